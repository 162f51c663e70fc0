#!/usr/bin/env python3
# Reference validator for visual-detection JSON lines. Written separately from
# the C++ parser; the test suite compares the two on seeded files.
#
# usage: validate_visual.py FILE VIDEO_ID
# prints {"accepted": n, "rejected": [line numbers]}
import json
import math
import sys


def reject_constant(name):
    raise ValueError(name)


def is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def valid(line, video_id):
    try:
        obj = json.loads(line, parse_constant=reject_constant)
    except ValueError:
        return False
    if not isinstance(obj, dict):
        return False
    if obj.get("video_id") != video_id:
        return False
    t = obj.get("t_s")
    if not is_num(t) or t < 0:
        return False
    label = obj.get("label")
    if not isinstance(label, str) or label == "":
        return False
    box = obj.get("bbox")
    if not isinstance(box, list) or len(box) != 4 or not all(is_num(c) for c in box):
        return False
    x, y, w, h = (float(c) for c in box)
    if any(c < 0 or c > 1 for c in (x, y, w, h)) or x + w > 1 or y + h > 1:
        return False
    conf = obj.get("confidence")
    if not is_num(conf) or conf < 0 or conf > 1:
        return False
    tid = obj.get("track_id")
    if tid is not None and (isinstance(tid, bool) or not isinstance(tid, int)):
        return False
    return True


def main():
    path, video_id = sys.argv[1], sys.argv[2]
    accepted, rejected = 0, []
    with open(path, "rb") as fh:
        raw = fh.read().decode("utf-8")
    for n, line in enumerate(raw.split("\n"), start=1):
        if line.endswith("\r"):
            line = line[:-1]
        if line.strip(" \t") == "":
            continue
        if valid(line, video_id):
            accepted += 1
        else:
            rejected.append(n)
    print(json.dumps({"accepted": accepted, "rejected": rejected}))


if __name__ == "__main__":
    main()
