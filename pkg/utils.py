import copy
import json
import logging
import math
from datetime import datetime

import numpy as np
import pandas as pd

from errors import BadParameter

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["beta", "gamma", "theta_hat", "se", "statistic", "pvalue", "status"]
VALUE_COLUMNS = ["theta_hat", "se", "statistic", "pvalue"]
DEGENERATE = "--"


class ConfigManager:
    def __init__(self, config_file=None):
        self.config_file = config_file
        self.default_config = {
            "estimation": {
                "grid_points": 200,
                "xtol": 1e-8,
                "residual_tol": 1e-6,
                "support_eps": 1e-12,
            },
            "testing": {
                "alpha": 0.05,
                "draws": 1_000_000,
                "seed": 20140101,
                "streams": 8,
                "pvalue_convention": "chisq_tail",
            },
            "simulation": {
                "replicates": 2000,
                "n": 500,
                "seed": 1,
                "n_jobs": 1,
            },
            "output": {
                "format": "csv",
                "decimals": 4,
            },
        }
        self.load_config()

    def load_config(self):
        """Load configuration from file, falling back to defaults; never writes"""
        self.config = copy.deepcopy(self.default_config)
        if self.config_file is None:
            return
        try:
            with open(self.config_file, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except FileNotFoundError:
            logger.info("config file %s not found, using defaults", self.config_file)
            return
        except json.JSONDecodeError as err:
            raise BadParameter(f"config file {self.config_file} is not valid JSON: {err}") from None
        if not isinstance(loaded, dict):
            raise BadParameter(f"config file {self.config_file} must hold a JSON object")
        for section, values in loaded.items():
            if not isinstance(values, dict):
                raise BadParameter(f"config section '{section}' must be an object")
            self.update_section(section, values)

    def save_config(self, path=None):
        """Save configuration to an explicit path"""
        path = path or self.config_file
        if path is None:
            raise BadParameter("no path given for saving the configuration")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.config, f, indent=2)

    def get(self, section, key, default=None):
        return self.config.get(section, {}).get(key, default)

    def set(self, section, key, value):
        if section not in self.config:
            self.config[section] = {}
        self.config[section][key] = value

    def get_section(self, section):
        return dict(self.config.get(section, {}))

    def update_section(self, section, updates):
        """Merge updates into a section; None values (unset CLI flags) are ignored"""
        if section not in self.config:
            self.config[section] = {}
        self.config[section].update({k: v for k, v in updates.items() if v is not None})


class GridReport:
    """One row per (beta, gamma) cell, serialised as display-rounded CSV or full-precision JSON"""

    def __init__(self, task, rows=None):
        self.task = task
        self.rows = list(rows or [])

    def add_row(self, beta, gamma, status="ok", **values):
        row = {"beta": float(beta), "gamma": float(gamma), "status": status}
        for column in VALUE_COLUMNS:
            row[column] = values.get(column)
        self.rows.append(row)

    def to_frame(self):
        frame = pd.DataFrame(self.rows, columns=REPORT_COLUMNS)
        if frame.empty:
            return frame
        return frame.sort_values(["gamma", "beta"], kind="mergesort").reset_index(drop=True)

    def to_csv(self, decimals=4):
        frame = self.to_frame()
        display = frame.astype(object)
        for column in VALUE_COLUMNS:
            display[column] = [
                _display_value(value, status, decimals)
                for value, status in zip(frame[column], frame["status"])
            ]
        return display.to_csv(index=False, lineterminator="\n")

    def to_json(self):
        records = []
        for row in self.to_frame().to_dict(orient="records"):
            records.append({k: _json_value(v) for k, v in row.items()})
        return json.dumps({"task": self.task, "rows": records}, indent=2)

    def render(self, fmt="csv", decimals=4):
        if fmt == "csv":
            return self.to_csv(decimals)
        if fmt == "json":
            return self.to_json()
        raise BadParameter(f"unknown output format '{fmt}'")


def _display_value(value, status, decimals):
    if status != "ok":
        return DEGENERATE
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    # numpy rounds half to even
    return f"{np.round(float(value), decimals):.{decimals}f}"


def _json_value(value):
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def format_number(value, decimals=4):
    return f"{np.round(float(value), decimals):.{decimals}f}"


class ReportGenerator:
    def __init__(self, decimals=4):
        self.decimals = decimals
        self.templates = {
            "fit": self.generate_fit_summary,
            "test": self.generate_test_summary,
            "power": self.generate_power_summary,
            "simulation": self.generate_simulation_summary,
            "level": self.generate_level_summary,
        }

    def _num(self, value):
        return format_number(value, self.decimals)

    def _vector(self, values):
        return ", ".join(self._num(v) for v in np.atleast_1d(values))

    def generate_fit_summary(self, data):
        """Minimum LSD fit with optional predicted frequencies"""
        result = data["result"]
        t = result.tuning
        lines = [
            f"# Minimum LSD fit ({result.family})",
            f"beta={t.beta:g} gamma={t.gamma:g} (A={t.a_exp:g}, B={t.b_exp:g}) n={result.n}",
            f"theta_hat: {self._vector(result.theta_hat)}",
        ]
        se = result.standard_errors()
        if se is not None:
            lines.append(f"se: {self._vector(se)}")
        lines.append(f"converged: {result.converged} (residual {result.residual_norm:.2e})")
        frequencies = data.get("frequencies")
        if frequencies is not None:
            head = "  ".join(f"{x}:{self._freq(v)}" for x, v in enumerate(frequencies[:-1]))
            lines.append(f"predicted: {head}  >={len(frequencies) - 1}:{self._freq(frequencies[-1])}")
        return "\n".join(lines)

    @staticmethod
    def _freq(value):
        return f"{np.round(value, 2):.2f}"

    def generate_test_summary(self, data):
        result = data["result"]
        lines = [
            f"# {data.get('title', 'LSD test')}",
            f"beta={result.tuning.beta:g} gamma={result.tuning.gamma:g} ({result.sides})",
            f"estimates: " + "; ".join(self._vector(e) for e in result.estimates),
            f"statistic: {self._num(result.statistic)}",
            f"p-value: {self._num(result.pvalue)}",
        ]
        if result.pvalue_stderr:
            lines.append(f"Monte Carlo se: {result.pvalue_stderr:.2e}")
        if result.convention:
            lines.append(f"convention: {result.convention}")
        return "\n".join(lines)

    def generate_power_summary(self, data):
        approx = data["result"]
        return "\n".join([
            "# Approximate power",
            f"theta*: {self._vector(approx.theta_star)}",
            f"critical value: {self._num(approx.critical_value)}",
            f"sigma: {self._num(approx.sigma)}",
            f"power: {self._num(approx.power)}",
        ])

    def generate_simulation_summary(self, data):
        sim = data["result"]
        lines = [
            "# Estimator simulation",
            f"replicates: {sim.replicates} (failed {sim.failures})",
            f"mean sqrt(n)(theta_hat - theta): {self._vector(sim.mean)}",
        ]
        if sim.variance_defined:
            lines.append(f"empirical variance: {self._vector(np.diag(sim.variance))}")
        else:
            lines.append("empirical variance: undefined (fewer than 2 fits)")
        lines.append(f"sandwich variance: {self._vector(np.diag(sim.sandwich))}")
        return "\n".join(lines)

    def generate_level_summary(self, data):
        study = data["result"]
        return "\n".join([
            "# Level study",
            f"rejection rate: {self._num(study.rejection_rate)} at nominal {study.alpha:g}",
            f"rejections: {study.rejections}/{study.completed} (failed {study.failures})",
            f"critical value: {self._num(study.critical_value)}",
        ])

    def generate_report(self, report_type, data):
        """Generate report of specified type"""
        if report_type in self.templates:
            report = self.templates[report_type](data)
            if data.get("timestamp"):
                report += f"\nGenerated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}"
            return report
        raise BadParameter(f"Report type '{report_type}' not supported")
