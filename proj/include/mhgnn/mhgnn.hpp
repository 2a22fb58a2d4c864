#pragma once

#include "mhgnn/error.hpp"
#include "mhgnn/tensor.hpp"
#include "mhgnn/segmentation.hpp"
#include "mhgnn/graph.hpp"
#include "mhgnn/feature_io.hpp"
#include "mhgnn/model.hpp"
#include "mhgnn/checkpoint.hpp"
#include "mhgnn/metrics.hpp"
#include "mhgnn/optim.hpp"
#include "mhgnn/seed.hpp"
#include "mhgnn/training.hpp"
#include "mhgnn/synthetic.hpp"
#include "mhgnn/config.hpp"
