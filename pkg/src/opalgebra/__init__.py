# opalgebra package
