"""Synthetic generators, Haar wavelets and the image patch pipeline."""
from .synthetic import (Scenario, ScenarioSpec, add_noise, as_tasks, gen_tasks,
                        sample_signals, scenario_family, signal_variance)

__all__ = ["Scenario", "ScenarioSpec", "add_noise", "as_tasks", "gen_tasks",
           "sample_signals", "scenario_family", "signal_variance"]
