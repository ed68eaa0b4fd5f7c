from ._campuswh import (
    Error,
    conv,
    grouping_id,
    mapper_count,
    mask_string,
    plan_splits,
    qualify_key,
    quantile,
    remove_outliers,
    run_cli,
    schema_reference,
    split_size,
)

__all__ = [
    "Error",
    "conv",
    "grouping_id",
    "mapper_count",
    "mask_string",
    "plan_splits",
    "qualify_key",
    "quantile",
    "remove_outliers",
    "run_cli",
    "schema_reference",
    "split_size",
]
