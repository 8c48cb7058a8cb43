#pragma once

// railpipe - railway LiDAR domain-adaptation data pipeline.
//
// Header-only. Include this umbrella or pick individual headers:
//   types.hpp     core value types (points, boxes, frames)
//   geometry.hpp  rotated-box BEV/3D IoU, box membership, translations
//   filters.hpp   range/frustum/min-points/ground/intensity harmonization
//   dataset.hpp   manifests, annotation + cloud formats, splits, stats
//   augment.hpp   Point-CutMix, Point-MixUp, size-aware source sampling
//   metrics.hpp   detection matching, AP40, Closed Gap, cloud statistics
//   scenegen.hpp  synthetic scenes and brute-force oracles (test support)
//   cli.hpp       batch pipeline commands

#include "railpipe/augment.hpp"
#include "railpipe/dataset.hpp"
#include "railpipe/errors.hpp"
#include "railpipe/filters.hpp"
#include "railpipe/geometry.hpp"
#include "railpipe/metrics.hpp"
#include "railpipe/parallel.hpp"
#include "railpipe/rng.hpp"
#include "railpipe/scenegen.hpp"
#include "railpipe/types.hpp"
