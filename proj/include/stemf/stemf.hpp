#pragma once
// Umbrella header.

#include "stemf/core.hpp"
#include "stemf/random.hpp"
#include "stemf/textproc.hpp"
#include "stemf/prompts.hpp"
#include "stemf/parallel.hpp"
#include "stemf/backend.hpp"
#include "stemf/http_backend.hpp"
#include "stemf/mock_backend.hpp"
#include "stemf/io.hpp"
#include "stemf/log.hpp"
#include "stemf/synthesis.hpp"
#include "stemf/judging.hpp"
#include "stemf/loop.hpp"
#include "stemf/eval.hpp"
#include "stemf/config.hpp"
