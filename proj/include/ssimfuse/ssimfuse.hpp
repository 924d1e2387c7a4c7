#pragma once

#include "ssimfuse/error.hpp"
#include "ssimfuse/tensor.hpp"
#include "ssimfuse/graph.hpp"
#include "ssimfuse/ops.hpp"
#include "ssimfuse/image.hpp"
#include "ssimfuse/config.hpp"
#include "ssimfuse/network.hpp"
#include "ssimfuse/loss.hpp"
#include "ssimfuse/trainer.hpp"
#include "ssimfuse/checkpoint.hpp"
#include "ssimfuse/image_io.hpp"
#include "ssimfuse/phantom.hpp"
#include "ssimfuse/visualizer.hpp"
#include "ssimfuse/metrics.hpp"
