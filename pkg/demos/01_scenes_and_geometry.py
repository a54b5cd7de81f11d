"""Synthetic scenes, agent frames and box overlap.

Run: python3 demos/01_scenes_and_geometry.py
"""
import numpy as np

from jointpred.geometry import OrientedBox, boxes_overlap, trajectories_overlap
from jointpred.scene import GeneratorConfig, generate_scene, parse_scene, serialize_scene, to_agent_frame

# an intersection: two vehicles timed to reach the same conflict point, one yields
scene = generate_scene("intersection", seed=4, params=GeneratorConfig(background_agents=1))
for agent in scene.agents:
    print(agent.id, agent.agent_type, "AV" if agent.is_av else "  ",
          "start", np.round(agent.future_xy[0], 2), "end", np.round(agent.future_xy[-1], 2))

# each agent sees the world from its own pose: +x is its heading
av = scene.agents[scene.av_index]
local = to_agent_frame(av.future_xy, av.current_pose)
print("AV future in its own frame, every 2 s:\n", np.round(local[19::20], 2))

# closest approach of the two interacting agents
a, b = scene.agents[:2]
gap = np.linalg.norm(a.future_xy - b.future_xy, axis=1)
print("closest centre distance %.2f m at t=%.1f s" % (gap.min(), 0.1 * (gap.argmin() + 1)))

# the ground truth was generated collision free
dims = [(x.length, x.width) for x in scene.agents]
print("ground truth overlaps:", trajectories_overlap(a.future_xy, b.future_xy, dims[0], dims[1]))

# separating axes: touching counts as overlap
print(boxes_overlap(OrientedBox(0, 0, 0, 2, 2), OrientedBox(2.0, 0, 0, 2, 2)),
      boxes_overlap(OrientedBox(0, 0, 0, 2, 2), OrientedBox(2.01, 0, 0, 2, 2)))

# one JSON line per scene, exact round trip
assert parse_scene(serialize_scene(scene)) == scene
print("serialized size:", len(serialize_scene(scene)), "bytes")
