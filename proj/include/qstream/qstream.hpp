#pragma once

#include "qstream/characterization.hpp"
#include "qstream/config.hpp"
#include "qstream/counter_rng.hpp"
#include "qstream/errors.hpp"
#include "qstream/image.hpp"
#include "qstream/io_formats.hpp"
#include "qstream/pipeline.hpp"
#include "qstream/reconstruction.hpp"
#include "qstream/sensor_model.hpp"
#include "qstream/streaming_sketch.hpp"
#include "qstream/synthesis.hpp"
