import re
import json
import math
import zlib
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import List, Dict, Any, Optional, Tuple, Union

import numpy as np
import pandas as pd


def derive_seed(root: int, name: str) -> int:
    """Derive a named sub-seed so that independent random streams never overlap"""
    sequence = np.random.SeedSequence([int(root), zlib.crc32(name.encode('utf-8'))])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def derive_rng(root: int, name: str) -> np.random.Generator:
    """Random generator for the named sub-stream of a root seed"""
    return np.random.default_rng(np.random.SeedSequence([int(root), zlib.crc32(name.encode('utf-8'))]))


def validate_seed(seed: Union[int, str, None]) -> int:
    """Validate a random seed (non-negative integer)"""
    if seed is None or (isinstance(seed, str) and not seed.strip()):
        raise ValueError("Seed cannot be empty")

    text = str(seed).strip()
    if not re.match(r'^\d+$', text):
        raise ValueError(f"Invalid seed: {seed}")

    return int(text)


LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')


def validate_log_level(level: Optional[str]) -> str:
    """Normalize a logging level name such as 'debug' to 'DEBUG'"""
    text = (level or '').strip().upper()
    if text not in LOG_LEVELS:
        raise ValueError(f"Invalid log level: {level!r} (choose from {', '.join(LOG_LEVELS)})")
    return text


def validate_channel_pair(value: str) -> Tuple[int, int]:
    """Parse a channel pair such as '1,2'"""
    if not value:
        raise ValueError("Channel pair cannot be empty")

    match = re.match(r'^\s*(\d+)\s*,\s*(\d+)\s*$', value)
    if not match:
        raise ValueError(f"Invalid channel pair format: {value}")

    a, b = int(match.group(1)), int(match.group(2))
    if a == b or not (1 <= a <= 255 and 1 <= b <= 255):
        raise ValueError(f"Channel pair needs two distinct channels in 1..255: {value}")

    return a, b


def _toml_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return repr(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return '[' + ', '.join(_toml_value(v) for v in value) + ']'
    return json.dumps(str(value), ensure_ascii=False)


def format_key_value(data: Dict[str, Any], prefix: str = '') -> str:
    """Render a nested dict as TOML: plain keys first, then one table per sub-dict"""
    lines: List[str] = []
    tables = []

    for key, value in data.items():
        if value is None:
            continue
        if isinstance(value, dict):
            tables.append((key, value))
        else:
            lines.append(f"{key} = {_toml_value(value)}")

    for key, table in tables:
        name = f"{prefix}.{key}" if prefix else key
        if lines:
            lines.append('')
        lines.append(f"[{name}]")
        body = format_key_value(table, name)
        if body:
            lines.append(body)

    return '\n'.join(lines)


def save_key_value(data: Dict[str, Any], filepath: str) -> bool:
    """Save data to a TOML-compatible key-value report"""
    try:
        with open(filepath, 'w', encoding='utf-8') as f:
            f.write(format_key_value(data) + '\n')

        logging.info(f"Report saved to {filepath}")
        return True

    except Exception as e:
        logging.error(f"Error saving report file: {e}")
        return False


def load_key_value(filepath: str) -> Dict[str, Any]:
    """Load a key-value report written by save_key_value"""
    with open(filepath, 'rb') as f:
        return tomllib.load(f)


def save_to_json(data: Dict[str, Any], filepath: str) -> bool:
    """Save data to JSON file"""
    try:
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, ensure_ascii=False)

        logging.info(f"Data saved to {filepath}")
        return True

    except Exception as e:
        logging.error(f"Error saving JSON file: {e}")
        return False


def save_to_csv(data: Union[pd.DataFrame, List[Dict[str, Any]]], filepath: str) -> bool:
    """Save tabular data (DataFrame or list of records) to CSV file"""
    try:
        frame = data if isinstance(data, pd.DataFrame) else pd.DataFrame(data)
        frame.to_csv(filepath, index=False)

        logging.info(f"Table saved to {filepath} ({len(frame)} rows)")
        return True

    except Exception as e:
        logging.error(f"Error saving CSV file: {e}")
        return False


def setup_logging(log_level=logging.INFO, log_file: Optional[str] = 'triplet_lab.log'):
    """Setup logging configuration"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True
    )
