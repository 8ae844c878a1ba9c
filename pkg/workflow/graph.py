"""LangGraph orchestration of the fit pipeline"""
import logging

from langgraph.graph import END, StateGraph

from app.schemas import RunConfig
from integrations.storage import ResultStore
from monitoring.metrics import MetricsCollector
from .nodes import FitNodes
from .state import FitState

logger = logging.getLogger(__name__)


class FitGraph:
    def __init__(self, metrics: MetricsCollector):
        self.nodes = FitNodes(metrics)
        self.graph = self._build_graph()

    def _build_graph(self):
        workflow = StateGraph(FitState)

        workflow.add_node("load", self.nodes.load)
        workflow.add_node("fit_lti", self.nodes.fit_lti)
        workflow.add_node("fit_ltv", self.nodes.fit_ltv)
        workflow.add_node("fit_ant", self.nodes.fit_ant)
        workflow.add_node("evaluate", self.nodes.evaluate)
        workflow.add_node("persist", self.nodes.persist)

        workflow.set_entry_point("load")

        # Route on the experiment kind
        def route_after_load(state):
            return f"fit_{state['config'].kind}"

        workflow.add_conditional_edges(
            "load",
            route_after_load,
            {"fit_lti": "fit_lti", "fit_ltv": "fit_ltv", "fit_ant": "fit_ant"},
        )

        for fit_node in ("fit_lti", "fit_ltv", "fit_ant"):
            workflow.add_edge(fit_node, "evaluate")
        workflow.add_edge("evaluate", "persist")
        workflow.add_edge("persist", END)

        return workflow.compile()

    def run(self, config: RunConfig, store: ResultStore) -> FitState:
        """Fit the fixtures in store for config.kind and write every result file."""
        initial_state = {
            "config": config,
            "store": store,
            "fixtures": {},
            "results": {},
            "current_step": "started",
            "written": [],
            "error": None,
        }
        final = self.graph.invoke(initial_state)
        logger.info("fit pipeline finished at step %s", final["current_step"])
        return final
