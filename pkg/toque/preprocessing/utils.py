import os
import io
import json
from typing import Dict, Tuple
import numpy as np
import pandas as pd

from ..framework.DatasetState import DatasetState, OOD_LABEL, UNLABELED
from ..framework._supporting_fn import InputFileError, ValidationError
from ..learner.Learner import LearnerState, PARAM_NAMES

FLOAT_FORMAT = "%.17g"
UNLABELED_MARK = "U"
OOD_MARK = "OOD"
LABEL_COLUMNS = ["sample_id", "label", "truth"]


def _read_text(path: str) -> str:
    try:
        with open(path) as infile:
            return infile.read()
    except OSError as e:
        raise InputFileError("Cannot open {}: {}".format(path, e))


def _to_float_frame(raw: pd.DataFrame, path: str, row_offset: int = 1) -> np.ndarray:
    values = np.empty(raw.shape, dtype=float)
    for j, col in enumerate(raw.columns):
        column = raw[col].str.strip()
        try:
            values[:, j] = column.astype(float).to_numpy()
        except ValueError:
            bad = pd.to_numeric(column, errors="coerce").isna().to_numpy()
            i = int(np.flatnonzero(bad)[0]) if bad.any() else 0
            raise InputFileError("{}: row {} column {}: non-numeric field {!r}.".format(
                path, i + row_offset, j + 1, raw.iloc[i, j]))
    return values


def _check_rectangular(text: str, path: str, skip: int = 0) -> int:
    widths = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if lineno <= skip or not line.strip():
            continue
        n = line.count(",") + 1
        if widths is None:
            widths = n
        elif n != widths:
            raise InputFileError("{}: row {} has {} columns, expected {} (ragged rows).".format(path, lineno, n, widths))
    if widths is None:
        raise InputFileError("{} is empty.".format(path))
    return widths


def load_matrix(path: str) -> np.ndarray:
    '''Dense comma-separated matrix without header.'''
    text = _read_text(path)
    _check_rectangular(text, path)
    raw = pd.read_csv(io.StringIO(text), header=None, dtype=str, skip_blank_lines=True, keep_default_na=False)
    values = _to_float_frame(raw, path)
    if not np.all(np.isfinite(values)):
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise InputFileError("{}: row {} column {}: non-finite value.".format(path, i + 1, j + 1))
    return values


def save_matrix(path: str, X: np.ndarray):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.size == 0:
        raise ValidationError("Only non-empty 2-D matrices can be saved, got shape {}.".format(X.shape))
    if not np.all(np.isfinite(X)):
        raise ValidationError("Refusing to save a matrix with non-finite entries to {}.".format(path))
    pd.DataFrame(X).to_csv(path, header=False, index=False, float_format=FLOAT_FORMAT)


def load_vector(path: str) -> np.ndarray:
    '''Single-column (or single-row) CSV as a 1-D array.'''
    X = load_matrix(path)
    if min(X.shape) != 1:
        raise InputFileError("{}: expected a single column, got shape {}.".format(path, X.shape))
    return X.ravel()


def read_cost_matrix(path: str) -> np.ndarray:
    '''
    Cost as dense rows without header, or as `k,n,value` triplets under that
    header. Triplets must cover every (k, n) pair exactly once.
    '''
    text = _read_text(path)
    first = next((line for line in text.splitlines() if line.strip()), "")
    if [c.strip() for c in first.split(",")] != ["k", "n", "value"]:
        return load_matrix(path)
    _check_rectangular(text, path, skip=1)
    raw = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    values = _to_float_frame(raw, path, row_offset=2)
    if len(values) == 0:
        raise InputFileError("{} holds no triplets.".format(path))
    kk, nn = values[:, 0], values[:, 1]
    if np.any(kk != np.round(kk)) or np.any(nn != np.round(nn)) or kk.min() < 0 or nn.min() < 0:
        raise InputFileError("{}: triplet indices must be nonnegative integers.".format(path))
    kk, nn = kk.astype(int), nn.astype(int)
    K, N = kk.max() + 1, nn.max() + 1
    if len(values) != K * N or len(set(zip(kk, nn))) != K * N:
        raise InputFileError("{}: triplets must cover each of the {} x {} entries exactly once.".format(path, K, N))
    cost = np.empty((K, N))
    cost[kk, nn] = values[:, 2]
    return cost


def _parse_label_field(value: str, allowed_extra: str, path: str, row: int, column: str) -> int:
    value = value.strip()
    if value == allowed_extra:
        return UNLABELED if allowed_extra == UNLABELED_MARK else OOD_LABEL
    try:
        parsed = int(value)
    except ValueError:
        raise InputFileError("{}: row {} column {}: cannot read {!r}.".format(path, row, column, value))
    if parsed < 0:
        raise InputFileError("{}: row {} column {}: negative class {}.".format(path, row, column, parsed))
    return parsed


def read_labels(path: str) -> pd.DataFrame:
    '''
    labels.csv with columns sample_id, label (class index or `U`) and an optional
    truth column (class index, `OOD` or blank). Returns integer columns with
    UNLABELED / OOD_LABEL markers and truth as a nullable integer.
    '''
    text = _read_text(path)
    _check_rectangular(text, path)
    raw = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    if list(raw.columns[:2]) != LABEL_COLUMNS[:2]:
        raise InputFileError("{}: expected header 'sample_id,label[,truth]'.".format(path))
    if len(raw) == 0:
        raise InputFileError("{} holds no samples.".format(path))
    ids = _to_float_frame(raw[["sample_id"]], path, row_offset=2)[:, 0]
    if np.any(ids != np.round(ids)):
        raise InputFileError("{}: sample ids must be integers.".format(path))
    labels = pd.DataFrame({"sample_id": ids.astype(int)})
    if labels.sample_id.duplicated().any():
        dup = labels.sample_id[labels.sample_id.duplicated()].iloc[0]
        raise InputFileError("{}: duplicated sample id {}.".format(path, dup))
    labels["label"] = [_parse_label_field(v, UNLABELED_MARK, path, i + 2, "label") for i, v in enumerate(raw.label)]
    truth = raw["truth"] if "truth" in raw.columns else pd.Series([""] * len(raw))
    labels["truth"] = pd.array(
        [None if v.strip() == "" else _parse_label_field(v, OOD_MARK, path, i + 2, "truth")
         for i, v in enumerate(truth)], dtype="Int64")
    return labels


def write_labels(path: str, state: DatasetState):
    rows = [(i, str(y), "") for i, y in zip(state.labeled_ids, state.labeled_y)]
    truth = state.hidden_truth().to_numpy() if state.has_hidden_truth else [None] * state.n_unlabeled
    for i, t in zip(state.unlabeled_ids, truth):
        rows.append((i, UNLABELED_MARK, "" if t is None else (OOD_MARK if t == OOD_LABEL else str(t))))
    pd.DataFrame.from_records(rows, columns=LABEL_COLUMNS).to_csv(path, index=False)


def labels_to_state(labels: pd.DataFrame, features: np.ndarray = None, M: int = None) -> Tuple[DatasetState, np.ndarray]:
    '''
    DatasetState from a label table whose rows align with `features` (or with
    the columns of a logit matrix when features is None). Also returns the file
    positions in the state's labeled-first order.
    '''
    n = len(labels)
    if features is None:
        features = np.zeros((n, 0))
    if len(features) != n:
        raise InputFileError("Label file lists {} samples but the feature matrix has {} rows.".format(n, len(features)))
    is_labeled = (labels.label != UNLABELED).to_numpy()
    order = np.concatenate((np.flatnonzero(is_labeled), np.flatnonzero(~is_labeled)))
    if M is None:
        known = np.concatenate((labels.label.to_numpy()[is_labeled],
                                labels.truth.dropna().to_numpy(dtype=int)))
        M = int(known.max()) + 1 if len(known) else 1
    unlabeled_truth = labels.truth.to_numpy()[~is_labeled]
    has_truth = (~is_labeled).any() and not pd.isna(unlabeled_truth).any()
    state = DatasetState(
        labeled_ids=labels.sample_id.to_numpy()[is_labeled],
        labeled_X=features[is_labeled],
        labeled_y=labels.label.to_numpy()[is_labeled],
        unlabeled_ids=labels.sample_id.to_numpy()[~is_labeled],
        unlabeled_X=features[~is_labeled],
        M=M,
        unlabeled_truth=unlabeled_truth.astype(int) if has_truth else None,
    )
    return(state, order)


def write_dataset(out_dir: str, data: DatasetState, test_id: Tuple[np.ndarray, np.ndarray],
                  test_ood: np.ndarray, manifest: Dict):
    os.makedirs(out_dir, exist_ok=True)
    save_matrix(os.path.join(out_dir, "features.csv"), data.features)
    write_labels(os.path.join(out_dir, "labels.csv"), data)
    columns = ["x{}".format(j) for j in range(data.d)]
    X_id, y_id = test_id
    test_id_df = pd.DataFrame(np.asarray(X_id).reshape(-1, data.d), columns=columns)
    test_id_df["label"] = np.asarray(y_id, dtype=int)
    test_id_df.to_csv(os.path.join(out_dir, "test_id.csv"), index=False, float_format=FLOAT_FORMAT)
    pd.DataFrame(np.asarray(test_ood).reshape(-1, data.d), columns=columns).to_csv(
        os.path.join(out_dir, "test_ood.csv"), index=False, float_format=FLOAT_FORMAT)
    write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _read_table(path: str) -> pd.DataFrame:
    text = _read_text(path)
    _check_rectangular(text, path)
    raw = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    return pd.DataFrame(_to_float_frame(raw, path, row_offset=2), columns=raw.columns)


def read_dataset(data_dir: str):
    '''(DatasetState, (test_X, test_y) or None, test_ood or None, manifest) of a dataset directory.'''
    manifest = read_json(os.path.join(data_dir, "manifest.json"))
    features = load_matrix(os.path.join(data_dir, "features.csv"))
    labels = read_labels(os.path.join(data_dir, "labels.csv"))
    state, order = labels_to_state(labels, features, M=manifest.get("M"))

    test_id, test_ood = None, None
    id_path, ood_path = os.path.join(data_dir, "test_id.csv"), os.path.join(data_dir, "test_ood.csv")
    if os.path.exists(id_path) and os.path.exists(ood_path):
        df = _read_table(id_path)
        if "label" not in df.columns:
            raise InputFileError("{}: missing 'label' column.".format(id_path))
        test_id = (df.drop(columns="label").to_numpy(), df.label.to_numpy(dtype=int))
        test_ood = _read_table(ood_path).to_numpy()
        if test_id[0].shape[1] != state.d or test_ood.shape[1] != state.d:
            raise InputFileError("Test features in {} do not match the training dimension {}.".format(data_dir, state.d))
    return(state, test_id, test_ood, manifest)


def write_json(path: str, obj):
    with open(path, "w") as outfile:
        json.dump(obj, outfile, sort_keys=True, indent=2)
        outfile.write("\n")


def read_json(path: str) -> Dict:
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InputFileError("{} is not valid JSON: {}".format(path, e))


def save_parameters(out_dir: str, learner: LearnerState):
    '''One dense CSV per tensor (vectors as a single row) plus manifest.json.'''
    os.makedirs(out_dir, exist_ok=True)
    tensors = dict(learner.params)
    tensors["x_mean"] = learner.x_mean
    tensors["x_std"] = learner.x_std
    manifest = {"tensors": {}, "seed": learner.seed}
    for name, value in tensors.items():
        filename = "{}.csv".format(name)
        save_matrix(os.path.join(out_dir, filename), value)
        manifest["tensors"][name] = {"file": filename, "shape": list(value.shape)}
    write_json(os.path.join(out_dir, "manifest.json"), manifest)


def load_parameters(model_dir: str) -> LearnerState:
    manifest = read_json(os.path.join(model_dir, "manifest.json"))
    tensors = {}
    for name, entry in manifest.get("tensors", {}).items():
        value = load_matrix(os.path.join(model_dir, entry["file"]))
        shape = tuple(entry["shape"])
        if value.size != int(np.prod(shape)):
            raise InputFileError("{}: {} does not match its manifest shape {}.".format(model_dir, entry["file"], shape))
        tensors[name] = value.reshape(shape)
    missing = [k for k in PARAM_NAMES + ("x_mean", "x_std") if k not in tensors]
    if missing:
        raise InputFileError("{}: parameter files missing for {}.".format(model_dir, missing))
    x_mean, x_std = tensors.pop("x_mean"), tensors.pop("x_std")
    return LearnerState(tensors, x_mean, x_std, seed=manifest.get("seed", 0))
