#!/usr/bin/env python3
"""
Sequential kriging design dashboard - Main Application Entry Point
"""

import streamlit as st

from src.ui.main_page import main_page
from src.utils.log_config import configure_logging


def main():
    """Main application function"""
    configure_logging()

    # Page configuration
    st.set_page_config(
        page_title="Sequential Kriging Designs",
        page_icon="📈",
        layout="wide",
        initial_sidebar_state="expanded"
    )

    # Run the main page
    main_page()


if __name__ == "__main__":
    main()
