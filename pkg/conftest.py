# Keeps the repository root importable (config, core, cli) under pytest.
