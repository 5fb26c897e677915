"""Lidar-derived validation of semantic segmentation road labels."""
