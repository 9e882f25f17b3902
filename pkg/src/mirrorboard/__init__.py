"""mirrorboard: a relay-synchronized, mirrored face-to-face presentation framework.

The package is organized around a small set of cooperating parts:

- ``wire``      binary codec for labeled flakes and stream framing
- ``relay``     the single central broadcast node (framed TCP + WebSocket)
- ``session``   roles, pose replication, mirror geometry, visibility
- ``board``     the shared content plane: render commands, pan, snapshots
- ``behavior``  scripted sketch simulations and the matrix lesson generator
- ``gaze``      focus intervals, eye-contact detection, summary metrics
- ``harness``   end-to-end scenario runner with a deterministic virtual clock
"""

__version__ = "0.1.0"
