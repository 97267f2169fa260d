#pragma once

#include "gdr/error.hpp"
#include "gdr/graph.hpp"
#include "gdr/diffusion.hpp"
#include "gdr/classifiers.hpp"
#include "gdr/dataset.hpp"
#include "gdr/neural.hpp"
#include "gdr/experiment.hpp"
