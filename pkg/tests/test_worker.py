# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

import unittest
import asyncio
import logging
import threading
import time

from ppsolab.pl_worker import PLJobRunner, run_jobs

logger = logging.getLogger(__name__)


class SlowJob:
    """
    A job that sleeps and remembers how many jobs ran at the same time.
    """

    running: int = 0
    max_running: int = 0
    lock: threading.Lock = threading.Lock()

    def __init__(self, value: int, delay: float):
        self.value: int = value
        self.delay: float = delay

    def __call__(self) -> int:
        with SlowJob.lock:
            SlowJob.running += 1
            SlowJob.max_running = max(SlowJob.max_running, SlowJob.running)

        logger.debug(f"Process data: {self.value}")
        time.sleep(self.delay)

        with SlowJob.lock:
            SlowJob.running -= 1

        return self.value + 10


def failing_job() -> int:
    raise ArithmeticError("No root in bracket")


class TestJobRunner(unittest.TestCase):
    def setUp(self):
        SlowJob.running = 0
        SlowJob.max_running = 0

    def test_init(self):
        runner = PLJobRunner()

        self.assertEqual(runner.n_workers, 4)
        self.assertEqual(runner.jobs_done, 0)

        with self.assertRaises(AssertionError):
            PLJobRunner(0)

    def test_order(self):
        """
        Test that the results come back in submission order, even when the
        first jobs finish last.
        """

        runner = PLJobRunner(4)
        jobs = [SlowJob(i, 0.05 * (8 - i)) for i in range(8)]

        results = runner.pl_run(jobs)

        self.assertEqual(results, [i + 10 for i in range(8)])
        self.assertEqual(runner.jobs_done, 8)

    def test_worker_limit(self):
        runner = PLJobRunner(2)
        runner.pl_run([SlowJob(i, 0.1) for i in range(6)])

        self.assertLessEqual(SlowJob.max_running, 2)
        self.assertGreaterEqual(SlowJob.max_running, 1)

    def test_no_jobs(self):
        self.assertEqual(PLJobRunner().pl_run([]), [])

    def test_exception(self):
        """
        Test that an error in one job is raised by pl_run() unwrapped.
        """

        runner = PLJobRunner(2)

        with self.assertRaises(ArithmeticError):
            runner.pl_run([SlowJob(1, 0.01), failing_job, SlowJob(2, 0.01)])

    def test_serial(self):
        jobs = [SlowJob(i, 0.0) for i in range(5)]

        self.assertEqual(run_jobs(jobs), run_jobs(jobs, PLJobRunner(3)))
        self.assertEqual(run_jobs([]), [])


class TestStartTasks(unittest.IsolatedAsyncioTestCase):
    async def test_start_tasks(self):
        runner = PLJobRunner(3)

        results = await runner.pl_start_tasks([SlowJob(i, 0.01) for i in range(5)])

        self.assertEqual(results, [10, 11, 12, 13, 14])
        self.assertEqual(runner.jobs_done, 5)

    async def test_process_job(self):
        runner = PLJobRunner(1)
        semaphore = asyncio.Semaphore(1)

        result = await runner.pl_process_job(semaphore, 0, SlowJob(5, 0.0))

        self.assertEqual(result, 15)
        self.assertEqual(runner.jobs_done, 1)


if __name__ == "__main__":
    unittest.main()
