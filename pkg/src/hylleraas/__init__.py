"""Variational helium ground state in Hylleraas coordinates with the F-basis."""
