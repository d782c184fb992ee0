"""
Aligning two cameras through GPS time
=====================================

Each camera's GPS track gives an affine map from stream time to UTC.
Frames of one camera are matched to the nearest frame of the other.
"""

from datetime import datetime, timedelta

from herdpipe.timesync import align_frame, fit_clock, frame_to_wall, parse_gps_csv


def gps_csv(start, drift):
    """One GPS fix per second of stream time; the camera clock runs ``drift`` times UTC."""
    rows = ["cts,date,lat,lon"]
    for k in range(30):
        utc = start + timedelta(milliseconds=round(k * 1000 * drift))
        rows.append(f"{k * 1000},{utc.isoformat(timespec='milliseconds')}Z,-30.5,151.6")
    return "\n".join(rows) + "\n"


t = datetime(2020, 3, 18, 1, 0, 0)
cam_a = fit_clock(parse_gps_csv(gps_csv(t + timedelta(seconds=2), 1.0)).samples, 30)
cam_b = fit_clock(parse_gps_csv(gps_csv(t, 1.0004)).samples, 30)
print("camera A", cam_a)
print("camera B", cam_b)

# camera A started 2 s after camera B, so A's frame 300 is roughly B's frame 360
for f in (0, 300, 9000):
    g = align_frame(cam_a, cam_b, f)
    print(f"A frame {f:5d} @ {frame_to_wall(cam_a, f)} -> B frame {g:5d} @ {frame_to_wall(cam_b, g)}")
