# Config package - Settings and run-scale presets
