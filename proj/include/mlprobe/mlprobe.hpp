#pragma once

#include "mlprobe/clusteval.hpp"
#include "mlprobe/dataio.hpp"
#include "mlprobe/harness.hpp"
#include "mlprobe/probe_model.hpp"
#include "mlprobe/report.hpp"
#include "mlprobe/trainer.hpp"
