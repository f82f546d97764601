from .config import REGIMES, StudyConfig, from_dict, load_config
from .render import color_table, read_ppm, render_heatmap, write_ppm
from .studies import (
    cmd_corr_study,
    cmd_edit,
    cmd_recon_study,
    cmd_train,
    correlation_pairs,
    correlation_study,
    edit_grid,
    held_out_samples,
    recon_report,
)

__all__ = [
    "REGIMES",
    "StudyConfig",
    "cmd_corr_study",
    "cmd_edit",
    "cmd_recon_study",
    "cmd_train",
    "color_table",
    "correlation_pairs",
    "correlation_study",
    "edit_grid",
    "from_dict",
    "held_out_samples",
    "load_config",
    "read_ppm",
    "recon_report",
    "render_heatmap",
    "write_ppm",
]
