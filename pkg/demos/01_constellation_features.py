"""A first look at the constellation layer.

A point cloud has no row order, so a classifier has to consume it through
an order-free reduction. The constellation layer does this with m
trainable "stars": each star summarizes its distances to every cloud
point with one number, giving a fixed-length descriptor for any cloud.

This script builds a tiny cloud by hand and shows the three distance
profiles, then demonstrates the properties everything downstream relies
on: permutation invariance, locality, and indifference to duplicated
points (which matters because image conversion pads clouds by repeating
points).
"""
import numpy as np

from ursa import Constellation, Rng, forward, init_constellation

cloud = np.array([
    [0.0, 0.0],
    [0.4, 0.1],
    [-0.3, 0.5],
    [0.1, -0.6],
])
constellation = init_constellation(Rng(7), star_count=3, dim=2, measure="gaussian",
                                   sigma=0.3)
print("stars:")
print(np.round(constellation.stars, 3))

print("\nEach measure turns the 4-point cloud into one value per star:")
for measure in ("gaussian", "exponential", "minimum"):
    c = Constellation(stars=constellation.stars, measure=measure, sigma=0.3, lam=3.0)
    print(f"  {measure:<12} -> {np.round(forward(cloud, c), 4)}")

print("\nShuffling the rows changes nothing (the reduction is symmetric):")
shuffled = cloud[::-1]
for measure in ("gaussian", "minimum"):
    c = Constellation(stars=constellation.stars, measure=measure, sigma=0.3)
    a, b = forward(cloud, c), forward(shuffled, c)
    print(f"  {measure:<12} max |difference| = {np.abs(a - b).max():.2e}")

print("\nMoving star 1 touches only component 1 of the output:")
moved = constellation.stars.copy()
moved[1] += 0.2
c0 = Constellation(stars=constellation.stars, measure="gaussian", sigma=0.3)
c1 = Constellation(stars=moved, measure="gaussian", sigma=0.3)
print(f"  delta = {np.round(forward(cloud, c1) - forward(cloud, c0), 4)}")

print("\nDuplicating a point shifts sum-based measures by exactly that")
print("point's term and leaves the minimum untouched:")
dup = np.concatenate([cloud, cloud[:1]])
for measure in ("gaussian", "minimum"):
    c = Constellation(stars=constellation.stars, measure=measure, sigma=0.3)
    print(f"  {measure:<12} {np.round(forward(dup, c) - forward(cloud, c), 4)}")
