"""Tessellation-localized transfer learning for nonparametric regression.

A Nadaraya-Watson fit on the source sample provides a score; on each cell
of an axis-aligned tessellation the target response is regressed on that
score by kernel-weighted least squares, and the tessellation is chosen on a
validation half of the target sample.
"""
