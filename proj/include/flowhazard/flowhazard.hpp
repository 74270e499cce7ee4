#pragma once

#include "flowhazard/config.hpp"
#include "flowhazard/error.hpp"
#include "flowhazard/experiment.hpp"
#include "flowhazard/flowdata.hpp"
#include "flowhazard/io.hpp"
#include "flowhazard/models.hpp"
#include "flowhazard/survival.hpp"
