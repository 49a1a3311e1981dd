def test_import_cli_module():
    import src.harness.cli  # noqa: F401


def test_import_library_modules():
    import src.ensembles.bounds  # noqa: F401
    import src.gge.gibbs  # noqa: F401
    import src.meanforce.derivatives  # noqa: F401
    import src.metrology.report  # noqa: F401
    import src.opalgebra.families  # noqa: F401
