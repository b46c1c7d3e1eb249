import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _env_float(name, default):
    return float(os.getenv(name, default))


def _env_int(name, default):
    return int(os.getenv(name, default))


class Settings:
    """Application settings and configuration"""

    # Logging Configuration
    LOG_LEVEL = os.getenv("MFDOE_LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("MFDOE_LOG_FILE")

    # Local Storage Configuration
    OUTPUT_DIR = os.getenv("MFDOE_OUTPUT_DIR", "results")

    # Parallel replicates (joblib)
    N_JOBS = _env_int("MFDOE_N_JOBS", "1")

    # Correlation matrix conditioning
    NUGGET_START = _env_float("MFDOE_NUGGET_START", "1e-10")
    NUGGET_MAX = _env_float("MFDOE_NUGGET_MAX", "1e-6")

    # Likelihood maximization (theta in unit-cube length-scales)
    THETA_LOWER = _env_float("MFDOE_THETA_LOWER", "0.05")
    THETA_UPPER = _env_float("MFDOE_THETA_UPPER", "5.0")
    MLE_STARTS = _env_int("MFDOE_MLE_STARTS", "10")

    # Criterion search
    GRID_POINTS_PER_DIM = _env_int("MFDOE_GRID_POINTS_PER_DIM", "2000")
    LHS_ITERS = _env_int("MFDOE_LHS_ITERS", "1000")

    # Metropolis-Hastings
    N_MCMC = _env_int("MFDOE_N_MCMC", "20000")
    BURN_IN = _env_int("MFDOE_BURN_IN", "2000")
    TARGET_ACCEPT = _env_float("MFDOE_TARGET_ACCEPT", "0.30")
    ADAPT_INTERVAL = _env_int("MFDOE_ADAPT_INTERVAL", "50")

    # Benchmark protocol
    N_REPLICATES = _env_int("MFDOE_N_REPLICATES", "20")
    N_TEST = _env_int("MFDOE_N_TEST", "1000")

    @classmethod
    def theta_bounds(cls):
        """Default per-axis length-scale bounds as a (lower, upper) pair"""
        return (cls.THETA_LOWER, cls.THETA_UPPER)

    @classmethod
    def validate_config(cls):
        """Validate that all configuration values are usable"""
        invalid = []

        if not 0 < cls.NUGGET_START <= cls.NUGGET_MAX:
            invalid.append("MFDOE_NUGGET_START/MFDOE_NUGGET_MAX")
        if not 0 < cls.THETA_LOWER < cls.THETA_UPPER:
            invalid.append("MFDOE_THETA_LOWER/MFDOE_THETA_UPPER")
        if cls.MLE_STARTS < 1:
            invalid.append("MFDOE_MLE_STARTS")
        if cls.GRID_POINTS_PER_DIM < 100:
            invalid.append("MFDOE_GRID_POINTS_PER_DIM")
        if not 0 <= cls.BURN_IN < cls.N_MCMC:
            invalid.append("MFDOE_BURN_IN/MFDOE_N_MCMC")
        if not 0 < cls.TARGET_ACCEPT < 1:
            invalid.append("MFDOE_TARGET_ACCEPT")
        if cls.ADAPT_INTERVAL < 1:
            invalid.append("MFDOE_ADAPT_INTERVAL")
        if cls.N_REPLICATES < 1:
            invalid.append("MFDOE_N_REPLICATES")
        if cls.N_TEST < 2:
            invalid.append("MFDOE_N_TEST")

        if invalid:
            raise ValueError(f"Invalid configuration values: {', '.join(invalid)}")

        return True


# Create settings instance
settings = Settings()
