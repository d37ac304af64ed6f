"""
Test package for the CDN cache-placement simulator.
"""
