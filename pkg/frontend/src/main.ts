import { RatingApi } from "./api.js";
import { RatingView } from "./ui.js";

const mount = document.getElementById("app");
if (mount === null) throw new Error("missing #app mount point");

// same origin by default; ?service=http://host:port points elsewhere
const base = new URLSearchParams(window.location.search).get("service") ?? "";
new RatingView(mount, new RatingApi(base));
