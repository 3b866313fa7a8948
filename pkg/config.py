"""
Configuration file for the priority-rules toolkit
"""

import os

import psutil

# Market Tokens
OUTSIDE_OPTION = '@0'

# Preference Domains
DOMAIN_KINDS = {
    'NO_OUTSIDE': 'no-outside',
    'WITH_OUTSIDE': 'with-outside',
    'EXPLICIT': 'explicit'
}

DEFAULT_DOMAIN_KIND = DOMAIN_KINDS['NO_OUTSIDE']

# Parallel Profile Enumeration
JOBS_ENV_VAR = 'PRIORITY_RULES_JOBS'
MAX_JOBS = psutil.cpu_count(logical=False) or 1
DEFAULT_JOBS = max(1, min(int(os.environ.get(JOBS_ENV_VAR, '1')), MAX_JOBS))
PARALLEL_CHUNK_SIZE = 2048  # Profiles per worker task

# Memory Guard
MEMORY_HEADROOM_FRACTION = 0.5  # Warn when a table needs more than this share
BYTES_PER_TABLE_ENTRY = 400  # Rough size of one profile -> allocation entry

# Search Limits
SEARCH_MAX_PROFILES = 4096
BRUTEFORCE_MAX_SIZE = 7  # Agents and objects for the exhaustive cycle oracle
NAIVE_CHECK_MAX_PROFILES = 64  # Pair/triple loop checkers
AUDIT_ENUMERATION_LIMIT = 2000000  # Larger full domains are audited over step states

# Theorem Sweep Limits
THEOREM_MAX_AGENTS = 3
THEOREM_MAX_OBJECTS = 3
SWEEP_SAMPLE_SEED = 20240

# Debug Settings
DEBUG_MODE = False
PROGRESS_INTERVAL = 50000  # Log every N profiles during long enumerations
LOG_LEVEL = 'WARNING'  # DEBUG, INFO, WARNING, ERROR

VERSION = '0.3.0'
