"""Blob fee market simulator and block-packing auditor."""
