import os
import sys

from dotenv import load_dotenv

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.harness import RunArchiver, list_local_runs

load_dotenv()


def list_artifacts():
    output_dir = os.getenv('DOCOFL_OUTPUT_DIR', 'runs')

    print(f"📂 Local runs ({output_dir}/)")
    local = list_local_runs(output_dir)
    if not local:
        print("   (none)")
    for name in local:
        print(f"   ✓ {name}")
    print()

    archiver = RunArchiver()
    if not archiver.enabled:
        print("GCS_BUCKET_NAME not set, skipping archived runs")
        return

    print(f"📂 Archived runs (gs://{archiver.bucket_name}/runs/)")
    archived = archiver.list_runs()
    if not archived:
        print("   (none)")
    for name in archived:
        marker = '✓' if name in local else '☁'
        print(f"   {marker} {name}")


if __name__ == "__main__":
    list_artifacts()
