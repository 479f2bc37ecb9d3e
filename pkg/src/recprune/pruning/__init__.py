from .masks import (
    PruneError,
    PruneMask,
    Ticket,
    global_magnitude_prune,
    kernel_sum_cut,
    kernel_sum_prune,
    ladder_sparsity,
    retained_width,
    select_filters,
    structured_filter_prune,
)
