# This file is part of PPSOLab, a numerical laboratory for participating
# policies with surrender options, MIT license.
#
# See: README.md

"""
This module defines the job runner that spreads independent computations
(Table 1 cells, sweep points, Monte Carlo path blocks) over worker threads.
"""

# Python std modules:
from collections.abc import Callable, Sequence
from typing import Any, Optional
import asyncio
import datetime
import logging
import threading

logger = logging.getLogger(__name__)

type PLJob = Callable[[], Any]


class PLJobRunner:
    """
    Runs a batch of jobs concurrently. Each job is a callable without arguments
    and runs in its own OS thread, so long numpy computations do not block the
    other jobs. At most n_workers jobs run at the same time. The results are
    returned in submission order.
    """

    def __init__(self, n_workers: int = 4):
        """
        Initializes the runner.

        :param n_workers: Maximum number of jobs running at the same time.
        """

        assert n_workers > 0, f"Number of workers must be positive: {n_workers}"

        self.n_workers: int = n_workers
        self.jobs_done: int = 0
        self.lock: threading.Lock = threading.Lock()

    def pl_run(self, jobs: Sequence[PLJob]) -> list[Any]:
        """
        Runs all the jobs and waits until every one of them has finished.
        If a job raises, the remaining jobs are cancelled and the exception
        is raised again here.

        :param jobs: The jobs to run.
        :return: One result per job, in the order of the jobs.
        :rtype: list[Any]
        """

        if not jobs:
            return []

        start_time = datetime.datetime.now()
        logger.info(f"Running {len(jobs)} jobs on {self.n_workers} workers.")

        try:
            results = asyncio.run(self.pl_start_tasks(jobs))
        except ExceptionGroup as group:
            raise group.exceptions[0]

        time_taken = datetime.datetime.now() - start_time
        in_seconds = time_taken.total_seconds()
        logger.info(f"All jobs done. Time taken: in seconds: {in_seconds}")
        logger.debug(f"Time taken: in minutes: {in_seconds / 60.0}")

        return results

    async def pl_start_tasks(self, jobs: Sequence[PLJob]) -> list[Any]:
        """
        Creates one task per job inside a task group.
        It is called by the pl_run() method.
        """

        semaphore = asyncio.Semaphore(self.n_workers)
        tasks = []

        async with asyncio.TaskGroup() as tg:
            for index, job in enumerate(jobs):
                task = tg.create_task(self.pl_process_job(semaphore, index, job))
                task.set_name(f"Job{index}")
                tasks.append(task)

        return [task.result() for task in tasks]

    async def pl_process_job(self, semaphore: asyncio.Semaphore, index: int, job: PLJob) -> Any:
        """
        Waits for a free worker slot and runs the job in a background thread.

        :param semaphore: Limits the number of running jobs.
        :param index: Position of the job in the batch, used for logging.
        :param job: The job to run.
        :return: The result of the job.
        :rtype: Any
        """

        async with semaphore:
            logger.debug(f"Start job {index}.")
            result = await asyncio.to_thread(job)
            logger.debug(f"Job {index} finished.")

        with self.lock:
            self.jobs_done += 1

        return result


def run_jobs(jobs: Sequence[PLJob], runner: Optional[PLJobRunner] = None) -> list[Any]:
    """
    Runs the jobs on the runner, or one after the other in the calling
    thread when no runner is given. Both give the same results.
    """

    if runner is None:
        return [job() for job in jobs]

    return runner.pl_run(jobs)
