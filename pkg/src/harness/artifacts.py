"""
Run Archiver
Copies finished run directories to Google Cloud Storage and lists archived
or local runs. Archival is skipped when GCS_BUCKET_NAME is not set.
"""

import logging
import os

from dotenv import load_dotenv
from google.cloud import storage

logger = logging.getLogger(__name__)

RUNS_PREFIX = 'runs/'

_CONTENT_TYPES = {
    '.csv': 'text/csv',
    '.json': 'application/json',
    '.env': 'text/plain',
    '.bin': 'application/octet-stream',
}


class RunArchiver:
    """
    Run Archiver - uploads run artifacts under runs/<run directory>/
    """

    def __init__(self, bucket_name=None, project_id=None):
        load_dotenv()
        self.bucket_name = bucket_name or os.getenv('GCS_BUCKET_NAME')
        self.project_id = project_id or os.getenv('GCP_PROJECT_ID')

    @property
    def enabled(self) -> bool:
        return bool(self.bucket_name)

    def _bucket(self):
        client = storage.Client(project=self.project_id)
        return client.bucket(self.bucket_name)

    def archive_run(self, run_dir):
        """
        Upload every file of a run directory.

        Args:
            run_dir: local directory written by a run

        Returns:
            Dict with 'status' ('success', 'skipped' or 'error') and the uploaded gs:// paths
        """
        if not self.enabled:
            logger.info("GCS_BUCKET_NAME not set, skipping archival")
            return {'status': 'skipped', 'paths': []}

        run_name = os.path.basename(os.path.normpath(run_dir))
        try:
            bucket = self._bucket()
            paths = []
            for name in sorted(os.listdir(run_dir)):
                local = os.path.join(run_dir, name)
                if not os.path.isfile(local):
                    continue
                blob_path = f"{RUNS_PREFIX}{run_name}/{name}"
                blob = bucket.blob(blob_path)
                content_type = _CONTENT_TYPES.get(os.path.splitext(name)[1], 'application/octet-stream')
                blob.upload_from_filename(local, content_type=content_type)
                paths.append(f"gs://{self.bucket_name}/{blob_path}")
            logger.info(f"Archived {len(paths)} files to gs://{self.bucket_name}/{RUNS_PREFIX}{run_name}/")
            return {'status': 'success', 'paths': paths}
        except Exception as e:
            logger.error(f"Failed to archive {run_dir}: {e}")
            return {'status': 'error', 'error': str(e), 'paths': []}

    def list_runs(self):
        """Run directory names under runs/ in the bucket, newest name first."""
        if not self.enabled:
            return []
        iterator = self._bucket().list_blobs(prefix=RUNS_PREFIX, delimiter='/')
        list(iterator)
        return sorted((p[len(RUNS_PREFIX):].rstrip('/') for p in iterator.prefixes), reverse=True)


def list_local_runs(output_dir):
    """Run directories (those holding a summary.json) under output_dir."""
    if not os.path.isdir(output_dir):
        return []
    return sorted(
        name for name in os.listdir(output_dir)
        if os.path.isfile(os.path.join(output_dir, name, 'summary.json'))
    )
