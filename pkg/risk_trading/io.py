import csv
import json
import pickle
import struct
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
import yaml

from .agents import (
    AgentConfig,
    NeuralAgent,
    build_models,
    with_networks,
)
from .extra_trees import ExtraTreesAgent
from .market_data import PcaModel
from .models import (
    AgentKind,
    DataError,
    FileError,
    MarketSeries,
    StepRecord,
)
from .nn_core import Network, NetworkSpec, parameter_count


PathLike = Union[str, Path]

NETWORK_MAGIC = b"RTNNET01"
PCA_MAGIC = b"RTPCA001"
AGENT_FILE = "agent.yaml"
PCA_FILE = "pca.bin"
TREES_FILE = "trees.pkl"

TRAJECTORY_COLUMNS = ["day", "position_before", "action", "delta_next", "sigma_next", "reward", "sigma"]
SWEEP_COLUMNS = ["agent", "alpha", "split", "seed", "pnl", "risky_pct", "risky_ratio", "sigma_hat"]


def format_float(value: float) -> str:
    """17 significant digits; round-trips every float64."""
    return format(float(value), ".17g")


def _format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


# Market CSV

def load_csv(path: PathLike) -> MarketSeries:
    """Read a `day,delta,f0,…` market file; errors name the offending line."""
    try:
        with open(path, "r", newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file")
            if header[:2] != ["day", "delta"]:
                raise DataError(f"{path} line 1: header must start with 'day,delta', got {','.join(header[:2])}")
            n_features = len(header) - 2
            expected = [f"f{k}" for k in range(n_features)]
            if header[2:] != expected:
                raise DataError(f"{path} line 1: feature columns must be named f0..f{n_features - 1}")

            days, deltas, features = [], [], []
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataError(f"{path} line {line}: expected {len(header)} columns, got {len(row)}")
                try:
                    day = int(row[0])
                    values = [float(cell) for cell in row[1:]]
                except ValueError as e:
                    raise DataError(f"{path} line {line}: {e}")
                if days and day <= days[-1]:
                    raise DataError(f"{path} line {line}: day {day} does not increase after {days[-1]}")
                days.append(day)
                deltas.append(values[0])
                features.append(values[1:])
    except FileNotFoundError:
        raise FileError(f"Market data file not found: {path}")
    except OSError as e:
        raise FileError(f"Error reading market data file: {e}")

    if not days:
        raise DataError(f"{path}: no data rows")
    return MarketSeries(
        days=np.array(days, dtype=np.int64),
        deltas=np.array(deltas, dtype=np.float64),
        features=np.array(features, dtype=np.float64).reshape(len(days), n_features),
    )


def write_csv(series: MarketSeries, path: PathLike) -> None:
    header = ["day", "delta"] + [f"f{k}" for k in range(series.feature_dim)]
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for i in range(len(series)):
                day, delta, features = series.record(i)
                writer.writerow([str(day), format_float(delta)] + [format_float(x) for x in features])
    except OSError as e:
        raise FileError(f"Error writing market data file: {e}")


# Row-oriented CSV and JSON reports

def save_rows(path: PathLike, rows: Sequence[dict], columns: Sequence[str]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format_cell(row[column]) for column in columns])
    except OSError as e:
        raise FileError(f"Error writing output file: {e}")


def load_rows(path: PathLike) -> list[dict]:
    try:
        with open(path, "r", newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))
    except FileNotFoundError:
        raise FileError(f"Input file not found: {path}")
    except OSError as e:
        raise FileError(f"Error reading input file: {e}")


def save_trajectory(path: PathLike, trajectory: Sequence[StepRecord]) -> None:
    save_rows(path, [record.to_dict() for record in trajectory], TRAJECTORY_COLUMNS)


def load_trajectory(path: PathLike) -> list[StepRecord]:
    records = []
    for line, row in enumerate(load_rows(path), start=2):
        try:
            records.append(StepRecord(
                day=int(row["day"]),
                position_before=int(row["position_before"]),
                action=int(row["action"]),
                delta_next=float(row["delta_next"]),
                sigma_next=float(row["sigma_next"]),
                reward=float(row["reward"]),
                sigma=float(row["sigma"]),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path} line {line}: {e}")
    return records


def save_json(path: PathLike, data: Any) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise FileError(f"Error writing JSON file: {e}")


def load_json(path: PathLike) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise FileError(f"Input file not found: {path}")
    except json.JSONDecodeError as e:
        raise FileError(f"Error parsing JSON file {path}: {e}")


# Network parameter files.
# Layout (little-endian): magic "RTNNET01", uint32 spec length, spec as UTF-8 JSON
# with sorted keys, uint64 parameter count, float64 parameters.

def network_bytes(net: Network) -> bytes:
    spec = json.dumps(net.spec.to_dict(), sort_keys=True).encode("utf-8")
    params = np.ascontiguousarray(net.params, dtype="<f8")
    return b"".join([
        NETWORK_MAGIC,
        struct.pack("<I", len(spec)),
        spec,
        struct.pack("<Q", params.size),
        params.tobytes(),
    ])


def network_from_bytes(data: bytes, source: str = "<bytes>") -> Network:
    offset = len(NETWORK_MAGIC)
    if data[:offset] != NETWORK_MAGIC:
        raise FileError(f"{source}: not a network parameter file (bad magic)")
    try:
        (spec_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        spec = NetworkSpec.from_dict(json.loads(data[offset:offset + spec_len].decode("utf-8")))
        offset += spec_len
        (count,) = struct.unpack_from("<Q", data, offset)
        offset += 8
    except (struct.error, UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise FileError(f"{source}: corrupt network header: {e}")
    if count != parameter_count(spec):
        raise FileError(f"{source}: {count} parameters stored, spec needs {parameter_count(spec)}")
    if len(data) != offset + 8 * count:
        raise FileError(f"{source}: expected {offset + 8 * count} bytes, found {len(data)}")
    params = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
    return Network(spec=spec, params=params)


def save_network(net: Network, path: PathLike) -> None:
    try:
        Path(path).write_bytes(network_bytes(net))
    except OSError as e:
        raise FileError(f"Error writing network file: {e}")


def load_network(path: PathLike) -> Network:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise FileError(f"Network file not found: {path}")
    except OSError as e:
        raise FileError(f"Error reading network file: {e}")
    return network_from_bytes(data, str(path))


# PCA files: magic "RTPCA001", uint64 F, uint64 d, mean (F), components (F·d, row-major),
# explained variance (d); all float64 little-endian.

def save_pca(model: PcaModel, path: PathLike) -> None:
    f_dim, d = model.components.shape
    payload = b"".join([
        PCA_MAGIC,
        struct.pack("<QQ", f_dim, d),
        np.ascontiguousarray(model.mean, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.components, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.explained_variance, dtype="<f8").tobytes(),
    ])
    try:
        Path(path).write_bytes(payload)
    except OSError as e:
        raise FileError(f"Error writing PCA file: {e}")


def load_pca(path: PathLike) -> PcaModel:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FileError(f"Error reading PCA file: {e}")
    offset = len(PCA_MAGIC)
    if data[:offset] != PCA_MAGIC:
        raise FileError(f"{path}: not a PCA file (bad magic)")
    try:
        f_dim, d = struct.unpack_from("<QQ", data, offset)
    except struct.error as e:
        raise FileError(f"{path}: corrupt PCA header: {e}")
    offset += 16
    expected = offset + 8 * (f_dim + f_dim * d + d)
    if len(data) != expected:
        raise FileError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)
    return PcaModel(
        mean=values[:f_dim],
        components=values[f_dim:f_dim + f_dim * d].reshape(f_dim, d),
        explained_variance=values[f_dim + f_dim * d:],
    )


# Agent checkpoint directories

def save_agent(
    directory: PathLike,
    agent: Union[NeuralAgent, ExtraTreesAgent],
    pca_model: Optional[PcaModel],
    input_dim: Optional[int] = None,
) -> Path:
    """Write agent.yaml plus one file per network (or the pickled trees) and the PCA model."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise FileError(f"Cannot create checkpoint directory {directory}: {e}")

    echo: dict[str, Any] = {"agent": agent.config.to_dict()}
    if isinstance(agent, ExtraTreesAgent):
        try:
            with open(directory / TREES_FILE, "wb") as f:
                pickle.dump(agent.model, f, protocol=pickle.HIGHEST_PROTOCOL)
        except OSError as e:
            raise FileError(f"Error writing {TREES_FILE}: {e}")
    else:
        networks = agent.networks()
        echo["input_dim"] = int(input_dim if input_dim is not None else next(iter(networks.values())).spec.input_dim)
        echo["networks"] = sorted(networks)
        for name, net in networks.items():
            save_network(net, directory / f"{name}.bin")
    if pca_model is not None:
        save_pca(pca_model, directory / PCA_FILE)

    try:
        with open(directory / AGENT_FILE, "w", encoding="utf-8") as f:
            yaml.safe_dump(echo, f, sort_keys=True, default_flow_style=False)
    except OSError as e:
        raise FileError(f"Error writing {AGENT_FILE}: {e}")
    return directory


def load_agent(directory: PathLike) -> tuple[Union[NeuralAgent, ExtraTreesAgent], Optional[PcaModel]]:
    directory = Path(directory)
    config_path = directory / AGENT_FILE
    if not config_path.exists():
        raise FileError(f"{directory} is not an agent checkpoint (missing {AGENT_FILE})")
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            echo = yaml.safe_load(f) or {}
        config = AgentConfig.from_dict(echo["agent"])
    except yaml.YAMLError as e:
        raise FileError(f"Error parsing {config_path}: {e}")
    except (KeyError, TypeError, ValueError) as e:
        raise FileError(f"{config_path}: invalid agent description: {e}")

    pca_path = directory / PCA_FILE
    pca_model = load_pca(pca_path) if pca_path.exists() else None

    if config.agent_kind is AgentKind.EXTRA_TREES:
        try:
            with open(directory / TREES_FILE, "rb") as f:
                model = pickle.load(f)
        except (OSError, pickle.UnpicklingError, EOFError) as e:
            raise FileError(f"Error reading {TREES_FILE}: {e}")
        return ExtraTreesAgent(config, model), pca_model

    input_dim = int(echo.get("input_dim", 0))
    expected = _expected_specs(config, input_dim)
    named = {}
    for name in echo.get("networks", []):
        net = load_network(directory / f"{name}.bin")
        _, model_name, net_name = name.split(".")
        want = expected.get((model_name, net_name))
        if want is None or want != net.spec:
            raise FileError(f"{directory}: network '{name}' does not match the agent configuration")
        named[name] = net
    if len(named) != 2 * len(expected):
        raise FileError(f"{directory}: expected {2 * len(expected)} networks, found {len(named)}")
    agent = with_networks(config, named)
    agent.eval_mode()
    return agent, pca_model


def _expected_specs(config: AgentConfig, input_dim: int) -> dict[tuple[str, str], NetworkSpec]:
    if input_dim < 1:
        raise FileError("checkpoint does not record the network input dimension")
    seeds = iter(range(1_000))
    models = build_models(config, input_dim, seeds)
    return {
        (model_name, net_name): net.spec
        for model_name, model in models.items()
        for net_name, net in model.networks.items()
    }
