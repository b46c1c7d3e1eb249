# Models package - Kriging and co-kriging surrogates
