#!/usr/bin/env python3
"""
Resource accounting for simulation runs.

ResourceMonitor wraps an experiment and records its wall time and peak
resident memory. Run this file directly to watch a running `isac` process
from another shell.
"""

import logging
import os
import sys
import threading
import time
from dataclasses import asdict, dataclass
from typing import Optional

import psutil

logger = logging.getLogger(__name__)

HIGH_MEMORY_MB = 1000
CRITICAL_MEMORY_MB = 2000
SYSTEM_PRESSURE_PERCENT = 90


@dataclass
class ResourceUsage:
    wall_time_s: float
    peak_rss_mb: float
    system_percent: float

    def as_dict(self) -> dict:
        return asdict(self)


def _check_thresholds(memory_mb: float, system_percent: float):
    if memory_mb > CRITICAL_MEMORY_MB:
        logger.warning(f"🚨 CRITICAL: Very high memory usage ({memory_mb:.1f} MB)")
    elif memory_mb > HIGH_MEMORY_MB:
        logger.warning(f"⚠️  WARNING: High memory usage ({memory_mb:.1f} MB)")
    if system_percent > SYSTEM_PRESSURE_PERCENT:
        logger.warning(f"🚨 CRITICAL: System memory pressure ({system_percent:.1f}%)")


class ResourceMonitor:
    """Samples a process's RSS in a background thread while the block runs."""

    def __init__(self, pid: Optional[int] = None, interval: float = 0.5):
        self.pid = os.getpid() if pid is None else pid
        self.interval = interval
        self.usage: Optional[ResourceUsage] = None
        self._peak_mb = 0.0
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._process: Optional[psutil.Process] = None
        self._start = 0.0

    def _sample(self):
        try:
            memory_mb = self._process.memory_info().rss / 1024 / 1024
        except psutil.NoSuchProcess:
            logger.error(f"❌ Process {self.pid} no longer exists")
            self._stop.set()
            return
        if memory_mb > self._peak_mb:
            self._peak_mb = memory_mb
            _check_thresholds(memory_mb, psutil.virtual_memory().percent)

    def _run(self):
        while not self._stop.wait(self.interval):
            self._sample()

    def __enter__(self) -> "ResourceMonitor":
        self._process = psutil.Process(self.pid)
        self._start = time.perf_counter()
        self._sample()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, exc_type, exc, tb):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        self._sample()
        self.usage = ResourceUsage(
            wall_time_s=time.perf_counter() - self._start,
            peak_rss_mb=self._peak_mb,
            system_percent=psutil.virtual_memory().percent,
        )
        logger.info(f"📊 Wall time {self.usage.wall_time_s:.1f} s, peak memory {self.usage.peak_rss_mb:.1f} MB")
        return False


def monitor_memory(pid: Optional[int] = None, interval: float = 5.0):
    """Log memory usage of a process every ``interval`` seconds until it exits."""
    if pid is None:
        pid = os.getpid()

    logger.info(f"🔍 Monitoring memory usage for PID {pid}")
    logger.info("Press Ctrl+C to stop monitoring")

    try:
        process = psutil.Process(pid)
        while True:
            try:
                memory_mb = process.memory_info().rss / 1024 / 1024
                system_memory = psutil.virtual_memory()
                logger.info(f"📊 Memory: {memory_mb:.1f} MB ({process.memory_percent():.1f}%) | "
                            f"System: {system_memory.percent:.1f}% used | "
                            f"Available: {system_memory.available / 1024 / 1024 / 1024:.1f} GB")
                _check_thresholds(memory_mb, system_memory.percent)
                time.sleep(interval)
            except psutil.NoSuchProcess:
                logger.error(f"❌ Process {pid} no longer exists")
                break
    except KeyboardInterrupt:
        logger.info("🛑 Monitoring stopped")


def find_isac_process() -> Optional[int]:
    """PID of a running simulator process, found by its command line."""
    for proc in psutil.process_iter(["pid", "cmdline"]):
        try:
            cmdline = " ".join(proc.info["cmdline"] or [])
        except (psutil.NoSuchProcess, psutil.AccessDenied):
            continue
        if proc.info["pid"] != os.getpid() and ("harness.py" in cmdline or "bin/isac" in cmdline):
            return proc.info["pid"]
    return None


def main():
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if len(sys.argv) > 1:
        try:
            pid = int(sys.argv[1])
        except ValueError:
            logger.error("❌ Invalid PID. Please provide a numeric process ID.")
            sys.exit(2)
        monitor_memory(pid)
        return

    pid = find_isac_process()
    if pid is None:
        logger.error("❌ Could not find a running simulation.")
        logger.error("Usage: python memory_monitor.py [PID]")
        sys.exit(1)
    logger.info(f"🎯 Found simulation process: PID {pid}")
    monitor_memory(pid)


if __name__ == "__main__":
    main()
