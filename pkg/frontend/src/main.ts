import { mount } from "./view.js";

document.addEventListener("DOMContentLoaded", () => {
  mount();
});
