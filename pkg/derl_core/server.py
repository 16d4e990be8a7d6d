"""MCP server for the DERL engine: tool, resource, and prompt registration."""

from __future__ import annotations

from fastmcp import FastMCP

from .resources import (
    status,
    data,
    runs,
    evaluation,
    templates,
    prompts,
)
from .utils.logging import setup_logging

setup_logging()


def create_mcp_server():
    """Create and configure the FastMCP server with all tools, resources, and prompts."""
    mcp = FastMCP(
        name="DERL MCP Server",
        instructions=(
            "MCP server for training and evaluating a missing-modality robust multimodal "
            "sentiment model. Supports synthetic data, background training runs, and "
            "intra-modal and inter-modal evaluation protocols."
        ),
    )

    # -- Tools: status ------------------------------------------------------
    mcp.tool()(status.derl_status)
    mcp.tool()(status.derl_count_params)

    # -- Tools: data --------------------------------------------------------
    mcp.tool()(data.derl_gen_data)
    mcp.tool()(data.derl_dataset_info)

    # -- Tools: training runs -----------------------------------------------
    mcp.tool()(runs.derl_train_start)
    mcp.tool()(runs.derl_train_status)
    mcp.tool()(runs.derl_train_history_chunk)
    mcp.tool()(runs.derl_train_close)

    # -- Tools: evaluation --------------------------------------------------
    mcp.tool()(evaluation.derl_evaluate)

    # -- Resources ----------------------------------------------------------
    mcp.resource("derl://presets")(templates.resource_presets)
    mcp.resource("derl://presets/{name}")(templates.resource_preset)

    # -- Prompts ------------------------------------------------------------
    mcp.prompt()(prompts.missing_modality_protocol)
    mcp.prompt()(prompts.ablation_study)

    return mcp


# Default server instance for stdio transport
server = create_mcp_server()
