#pragma once

#include "idletune/errors.hpp"
#include "idletune/estimator.hpp"
#include "idletune/failure_model.hpp"
#include "idletune/ingest.hpp"
#include "idletune/records.hpp"
#include "idletune/simulator.hpp"
#include "idletune/window.hpp"
