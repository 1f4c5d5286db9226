from .utils import (
    load_matrix,
    save_matrix,
    load_vector,
    read_cost_matrix,
    read_labels,
    write_labels,
    labels_to_state,
    read_dataset,
    write_dataset,
    read_json,
    write_json,
    save_parameters,
    load_parameters,
)
