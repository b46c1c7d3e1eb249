# Utils package - Errors, logging and seed helpers
