"""QuadSCP command-line entrypoint.

Run locally:
    1) Activate your virtual environment.
    2) pip install -r requirements.txt
    3) python main.py solve --scenario data/scenarios/two_agent.json --out out/two

Settings:
    - Every numeric flag may also come from a QUADSCP_<FLAG> environment variable
      (for example QUADSCP_BETA, QUADSCP_NP, QUADSCP_BUDGET); flags win.
    - A .env file in the working directory is loaded first.
"""

import sys

from dotenv import load_dotenv

from cli.commands import run


def main() -> None:
    load_dotenv()
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
