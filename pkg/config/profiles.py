"""
Run-scale presets for the benchmark harness
"""


class Profiles:
    """Collection of named run-scale presets"""

    DESK = {
        "replicates": 20,
        "n_mcmc": 20000,
        "burn_in": 2000,
        "n_test": 1000,
    }

    FULL = {
        "replicates": 50,
        "n_mcmc": 50000,
        "burn_in": 5000,
        "n_test": 1000,
    }

    @staticmethod
    def get_profile(full_scale=False):
        """Get the preset dict, full scale or desk scale"""
        base = Profiles.FULL if full_scale else Profiles.DESK
        return dict(base)

    @staticmethod
    def names():
        return ["desk", "full"]
