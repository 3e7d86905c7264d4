"""Malicious domain detection on active-DNS resolution data.

Pipeline: ingest records into a domain/IP graph, classify IPs as public or
dedicated, build weighted domain association graphs, then score domains by
max-product path inference or loopy belief propagation.
"""
__version__ = "0.1.0"
