"""
Main page UI component for the sequential design dashboard
"""

import json
from typing import Optional

import streamlit as st
from pydantic import ValidationError

# Import our services
from src.services.experiment_service import CRITERIA_BY_MODE, ExperimentConfig, experiment_service
from src.services.results_service import results_service
from src.utils.exceptions import SurrogateDesignError


def build_config(problem: str, surrogate: str, mode: str, criterion: str, replicates: int, budget: int,
                 seed: int, q: int, round_budget: Optional[int], n_test: int) -> Optional[ExperimentConfig]:
    """Validate the sidebar choices; shows the error and returns None when invalid"""
    try:
        return ExperimentConfig(
            problem=problem, surrogate=surrogate, mode=mode, criterion=criterion, replicates=replicates,
            budget=budget, seed=seed, q=q, round_budget=round_budget, n_test=n_test,
        )
    except ValidationError as e:
        st.error(f"Invalid configuration: {e}")
        return None


def run_and_save(config: ExperimentConfig):
    """Run the experiment and write its files under the results folder"""
    try:
        result = experiment_service.run(config)
    except SurrogateDesignError as e:
        st.error(f"Experiment failed: {e}")
        return None, None
    folder = results_service.run_dir(f"{config.problem}_{config.surrogate}_{config.criterion}_seed{config.seed}")
    files = results_service.save_experiment(result, folder)
    return result, files


def main_page():
    """Main page layout and functionality"""

    # Header
    st.title("Sequential Kriging Designs")
    st.caption("Kriging and multi-fidelity co-kriging sequential design on benchmark problems")

    # Sidebar
    with st.sidebar:
        st.header("Experiment")
        problems = {p["name"]: p for p in experiment_service.list_problems()}
        problem = st.selectbox("Problem", list(problems))
        surrogate = st.radio("Surrogate", ["kriging", "cokriging"], horizontal=True)
        mode = st.radio("Mode", ["one-point", "batch"], horizontal=True)
        criterion = st.selectbox("Criterion", list(CRITERIA_BY_MODE[(surrogate, mode)]))

        st.header("Budget")
        replicates = st.number_input("Replicates", min_value=1, max_value=50, value=5)
        budget = st.number_input("Time budget", min_value=0, value=15)
        seed = st.number_input("Master seed", min_value=0, value=0)
        q = st.number_input("Batch size q", min_value=1, value=5, disabled=mode != "batch")
        round_budget = None
        if surrogate == "cokriging" and mode == "batch":
            round_budget = st.number_input("Round budget T", min_value=1, value=120)
        n_test = st.number_input("Test points", min_value=10, value=1000)

        st.header("Problem")
        info = problems[problem]
        st.write(info["description"])
        st.caption(f"d = {info['dim']}, levels = {info['levels']}, run times = {info['costs']}")

    config = build_config(problem, surrogate, mode, criterion, int(replicates), int(budget), int(seed),
                          int(q), int(round_budget) if round_budget is not None else None, int(n_test))
    if config is None:
        return

    with st.expander("Configuration"):
        st.code(experiment_service.describe(config), language="json")

    if st.button("Run experiment", type="primary"):
        with st.spinner("Running replicates..."):
            result, files = run_and_save(config)
        if result is None:
            return
        st.session_state["result"] = result
        st.session_state["files"] = files

    result = st.session_state.get("result")
    files = st.session_state.get("files")
    if result is None:
        st.info("Choose an experiment in the sidebar and run it.")
        return

    completed, failed = len(result.completed), len(result.failures)
    col1, col2 = st.columns(2)
    col1.metric("Completed replicates", completed)
    col2.metric("Failed replicates", failed)
    for failure in result.failures:
        st.warning(f"Replicate {failure.replicate}: {failure.failure}")

    st.subheader("NRMSE summary")
    summary = result.summary_frame()
    st.dataframe(summary, use_container_width=True)

    st.subheader("Records")
    st.dataframe(result.records_frame(), use_container_width=True)

    # Downloads
    col1, col2, col3 = st.columns(3)
    for column, name, mime in ((col1, "summary.csv", "text/csv"), (col2, "records.csv", "text/csv"),
                               (col3, "manifest.json", "application/json")):
        with column:
            st.download_button(f"Download {name}", data=files[name].read_bytes(), file_name=name, mime=mime)

    manifest = json.loads(files["manifest.json"].read_text())
    st.caption(f"Saved to {files['manifest.json'].parent} (versions: {manifest['versions']})")
