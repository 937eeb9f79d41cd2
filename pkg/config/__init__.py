"""
Config package.

Runtime settings (export/log folders, worker counts, reference tolerances)
live in `config/lieode_config.json`; `LIEODE_THREADS` overrides `threads`.
Sample experiments are in `config/experiments/*.json`.
"""
