from .render import (EPISODE_COLUMNS, KINDS, TRAIN_COLUMNS, FigureSpec,
                     HeaderMismatch, analytic_error_curve, read_csv, render)

__version__ = "0.1.0"
