import sys
from dotenv import load_dotenv


def main():
    load_dotenv()

    from src.cli.app import CLIApp
    sys.exit(CLIApp().run())


if __name__ == "__main__":
    main()
