#pragma once

#include "privpart/adamw.hpp"
#include "privpart/dataset.hpp"
#include "privpart/experiment.hpp"
#include "privpart/federation.hpp"
#include "privpart/metrics.hpp"
#include "privpart/nn.hpp"
#include "privpart/partition.hpp"
#include "privpart/rng.hpp"
#include "privpart/version.hpp"
