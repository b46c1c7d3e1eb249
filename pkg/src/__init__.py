# Sequential kriging designs - Source Package
