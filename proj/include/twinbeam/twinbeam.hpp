#pragma once

#include "twinbeam/calibration.hpp"
#include "twinbeam/daq_pipeline.hpp"
#include "twinbeam/detector_sim.hpp"
#include "twinbeam/errors.hpp"
#include "twinbeam/runner.hpp"
#include "twinbeam/scenario.hpp"
#include "twinbeam/squeezing_metrics.hpp"
#include "twinbeam/trace_io.hpp"
#include "twinbeam/twinbeam_model.hpp"
