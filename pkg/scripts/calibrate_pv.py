"""Refit the PV array to the 100 kW @ 1000 W/m^2 and 29.5 kW @ 300 W/m^2 anchors."""
from pvfc.plant import PvArrayParams, calibrate_pv, maximum_power_point


def main():
    p = calibrate_pv()
    d = PvArrayParams()
    print(f"photocurrent_coeff = {p.photocurrent_coeff!r}   (default {d.photocurrent_coeff!r})")
    print(f"series_resistance  = {p.series_resistance!r}   (default {d.series_resistance!r})")
    for g in (1000.0, 300.0):
        v, pw = maximum_power_point(g, params=p)
        print(f"G = {g:6.0f} W/m^2: MPP {pw / 1e3:7.3f} kW at {v:6.1f} V")


if __name__ == "__main__":
    main()
