#pragma once

// CRO PUF key-sharing simulation: devices, model extraction, reliability
// thresholds, TTP provisioning protocol, and population experiments.

#include "cropuf/agents.hpp"
#include "cropuf/analysis.hpp"
#include "cropuf/crp.hpp"
#include "cropuf/device.hpp"
#include "cropuf/errors.hpp"
#include "cropuf/extraction.hpp"
#include "cropuf/grid.hpp"
#include "cropuf/keyshare.hpp"
#include "cropuf/path.hpp"
#include "cropuf/rng.hpp"
#include "cropuf/serial.hpp"
#include "cropuf/transport.hpp"
#include "cropuf/wire.hpp"
