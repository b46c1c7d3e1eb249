# Services package - Benchmark problems, experiment orchestration and result storage
