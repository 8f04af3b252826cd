#!/usr/bin/env python3
from risk_trading.main import main

if __name__ == "__main__":
    main()
