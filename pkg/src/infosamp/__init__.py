"""Simulation harness for informative survey designs and weighted pseudo-posterior inference."""

from .designs import (BrewerPPS, Census, DyadicPartition, Multistage, OnePPSPerGroup, SampleDraw, SRS, Stage,
                      StratifiedDyadic, SystematicEqual, SystematicPPS, brewer_pps_inclusion, draw,
                      draw_indicators, first_order_inclusion, three_stage_design)
from .experiments import ExperimentConfig, ExperimentResult, run_study
from .inclusion import (InclusionTable, condition_growth_scan, condition_report, deviation_matrix,
                        exact_inclusion, monte_carlo_inclusion)
from .inference import WeightedDataset, fit_pseudo_posterior, weighted_mle
from .synthpop import Population, PopulationConfig, TrueModel, generate_population

__version__ = "0.1.0"
