# Design package - Experimental designs, acquisition criteria and sequential engines
