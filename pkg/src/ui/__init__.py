# UI package - Streamlit dashboard components
