from .config import (Scenario, build_hydro_state, build_state, dump_scenario, load_scenario, rng_for,
                     save_scenario, scenario_from_dict, with_overrides)
from .presets import preset, preset_library, preset_names
from .runner import RunResult, report_run, run_scenario, sweep

__all__ = [
    "Scenario", "build_hydro_state", "build_state", "dump_scenario", "load_scenario", "rng_for", "save_scenario",
    "scenario_from_dict", "with_overrides", "preset", "preset_library", "preset_names", "RunResult", "report_run",
    "run_scenario", "sweep",
]
