#pragma once

#include "flowhazard/survival/cox.hpp"
#include "flowhazard/survival/kaplan_meier.hpp"
#include "flowhazard/survival/record.hpp"
